fn main() {
    std::process::exit(fpop::cli::run(std::env::args_os()));
}
