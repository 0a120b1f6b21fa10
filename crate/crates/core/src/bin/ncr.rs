fn main() {
    std::process::exit(ncr::cli::dispatch(std::env::args_os().skip(1)));
}
