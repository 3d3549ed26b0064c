fn main() {
    std::process::exit(bordertouch::cli::main(std::env::args_os()));
}
