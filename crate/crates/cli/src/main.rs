fn main() {
    std::process::exit(tsvc::commands::main_with(std::env::args_os()));
}
