fn main() {
    std::process::exit(fkgen::cli::main());
}
