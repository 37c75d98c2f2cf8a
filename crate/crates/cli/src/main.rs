fn main() -> std::process::ExitCode {
    sgnn_cli::main_entry()
}
