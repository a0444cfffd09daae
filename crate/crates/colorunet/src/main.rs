fn main() {
    std::process::exit(colorunet::cli::main_entry());
}
