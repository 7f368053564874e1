fn main() {
    std::process::exit(idemb::cli::cli_main(std::env::args_os()));
}
