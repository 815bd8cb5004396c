fn main() -> std::process::ExitCode {
    promptsel::cli::main()
}
