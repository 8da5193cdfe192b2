fn main() -> std::process::ExitCode {
    mitl::cli::main()
}
