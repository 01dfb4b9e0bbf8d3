use std::io::{self, BufReader};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut stdin = BufReader::new(io::stdin().lock());
    let code = smiles_diffusion::cli::run_cli(
        std::env::args_os(),
        &mut stdin,
        &mut io::stdout().lock(),
        &mut io::stderr().lock(),
    );
    std::process::exit(code);
}
