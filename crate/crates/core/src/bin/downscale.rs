fn main() {
    std::process::exit(downscale_core::evalcli::cli::run(std::env::args_os()));
}
