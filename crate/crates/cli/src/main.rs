fn main() -> std::process::ExitCode {
    darktrap::cli::main()
}
