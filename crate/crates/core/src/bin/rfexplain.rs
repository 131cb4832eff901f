fn main() {
    std::process::exit(rfexplain::cli::main());
}
