fn main() {
    std::process::exit(eoe_lab::cli::run(std::env::args_os()));
}
