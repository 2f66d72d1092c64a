fn main() {
    std::process::exit(pulseopt::cli::main());
}
