fn main() {
    std::process::exit(tracktention::cli::cli_main(std::env::args()));
}
