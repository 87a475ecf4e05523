fn main() {
    std::process::exit(cascadecl::cli::run());
}
