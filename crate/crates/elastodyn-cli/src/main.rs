fn main() {
    println!("elastodyn");
}
