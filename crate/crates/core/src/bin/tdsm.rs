fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = tdsm::cli::run(std::env::args_os(), &mut input, &mut out);
    std::process::exit(code);
}
