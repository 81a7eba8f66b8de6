fn main() {
    std::process::exit(kuramoto_gnn::experiments::cli_main(std::env::args_os()));
}
