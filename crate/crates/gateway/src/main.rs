fn main() -> std::process::ExitCode {
    seeds_gateway::cli::main()
}
