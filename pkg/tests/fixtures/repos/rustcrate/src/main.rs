fn main() {
    println!("{}", rustcrate_sum(&[1, 2, 3]));
}

fn rustcrate_sum(values: &[i32]) -> i32 {
    values.iter().sum()
}
