fn main() {
    std::process::exit(lmpanel::cli::run(std::env::args_os()));
}
