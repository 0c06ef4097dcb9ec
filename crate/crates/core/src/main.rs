fn main() {
    std::process::exit(dat_kit::cli::execute(std::env::args_os()));
}
