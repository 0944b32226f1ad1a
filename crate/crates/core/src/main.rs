fn main() {
    std::process::exit(bosonbound_core::cli::run(std::env::args_os()));
}
