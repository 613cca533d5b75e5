fn main() {
    std::process::exit(gfn::cli::run(std::env::args_os()));
}
