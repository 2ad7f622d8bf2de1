fn main() {
    std::process::exit(distdyn::cli::main());
}
