fn main() {
    let env = |k: &str| std::env::var(k).ok();
    std::process::exit(cove::cli::main_from(std::env::args_os(), &env));
}
