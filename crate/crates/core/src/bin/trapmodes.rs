fn main() {
    std::process::exit(trapmodes::cli::main());
}
