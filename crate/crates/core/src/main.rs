fn main() {
    std::process::exit(examrec::cli::parse_and_dispatch(std::env::args()));
}
