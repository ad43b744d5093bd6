fn main() {
    std::process::exit(hmm_select::run());
}
