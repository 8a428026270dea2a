fn main() {
    let code = lowpass_fedrec::cli::main_with(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
