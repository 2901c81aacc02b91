fn main() {
    std::process::exit(impress_cli::dispatch(std::env::args_os()));
}
