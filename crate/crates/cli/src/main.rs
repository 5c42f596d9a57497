fn main() -> std::process::ExitCode {
    misinfo_cli::main_entry()
}
