fn main() {
    std::process::exit(flysq::cli::cli_main(std::env::args_os()));
}
