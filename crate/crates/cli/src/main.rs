fn main() {
    // Subcommands land once the core library is complete.
}
