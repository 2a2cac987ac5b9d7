fn main() {
    std::process::exit(caliblab::run(std::env::args_os()));
}
