fn main() -> std::process::ExitCode {
    passby::cli::main()
}
