fn main() {
    std::process::exit(samdistill::cli::run(std::env::args_os()));
}
