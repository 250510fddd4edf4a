fn main() {
    std::process::exit(catprobe::cli::main_with(std::env::args_os()));
}
