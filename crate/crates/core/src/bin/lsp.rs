fn main() {
    std::process::exit(lsp_core::harness::cli::dispatch(std::env::args_os()));
}
