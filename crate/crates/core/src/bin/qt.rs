fn main() -> std::process::ExitCode {
    qt_core::cli::main()
}
