fn main() {
    std::process::exit(regionmix::cli::main_with(std::env::args_os()));
}
