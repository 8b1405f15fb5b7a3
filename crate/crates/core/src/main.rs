fn main() {
    std::process::exit(psd_sense::cli::run(std::env::args_os()));
}
