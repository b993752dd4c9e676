fn main() {
    std::process::exit(tinyspeech::cli::run(std::env::args_os()));
}
