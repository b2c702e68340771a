fn main() {
    std::process::exit(omnideblur::cli::run());
}
