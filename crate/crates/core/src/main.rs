fn main() -> std::process::ExitCode {
    gazetarget::cli::main()
}
