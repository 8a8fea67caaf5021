fn main() -> std::process::ExitCode {
    spurbench::cli::main()
}
