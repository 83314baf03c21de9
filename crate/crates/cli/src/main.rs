fn main() {
    chronomem_cli::run()
}
