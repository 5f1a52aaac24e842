fn main() {
    std::process::exit(asm_core::cli::run(std::env::args_os()));
}
