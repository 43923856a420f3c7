fn main() -> std::process::ExitCode {
    traj::cli::main()
}
