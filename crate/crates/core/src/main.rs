fn main() {
    std::process::exit(nfsnet::cli::main());
}
