fn main() -> std::process::ExitCode {
    boxreg::cli::main()
}
