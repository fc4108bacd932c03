use std::io;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("WOC_LOG", "warn")).init();
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let mut out = io::BufWriter::new(io::stdout().lock());
    let mut err = io::stderr();
    let code = woc_cli::run(std::env::args_os(), std::env::vars().collect(), &mut input, &mut out, &mut err);
    drop(out);
    std::process::exit(code);
}
