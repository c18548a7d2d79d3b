fn main() {
    std::process::exit(suplin_bsde::experiments::cli_main(std::env::args_os()));
}
