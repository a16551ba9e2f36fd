fn main() {
    std::process::exit(temprel::cli::main_entry());
}
