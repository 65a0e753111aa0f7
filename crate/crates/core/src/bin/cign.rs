fn main() -> std::process::ExitCode {
    cign_core::cli::main()
}
