fn main() {
    std::process::exit(rmtcorr::cli::main());
}
