fn main() {
    use ndarray::{s, Array1, Array2, Axis};
    let a: Array2<f64> = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64);
    let sl = a.slice(s![.., ..3]).to_owned();
    println!("col-slice to_owned standard: {}", sl.is_standard_layout());
    println!("col-slice row as_slice some: {}", sl.row(1).as_slice().is_some());
    let rev = a.slice(s![..;-1, ..]).to_owned();
    println!("rev to_owned standard: {}", rev.is_standard_layout());
    println!("rev row as_slice some: {}", rev.row(1).as_slice().is_some());
    let al: Array1<f64> = Array1::from(vec![1.0, 2.0, 3.0]);
    let dp: Array1<f64> = Array1::from(vec![5.0, 6.0]);
    let outer = al.view().insert_axis(Axis(1)).to_owned().dot(&dp.view().insert_axis(Axis(0)));
    println!("outer standard: {}", outer.is_standard_layout());
    println!("outer row as_slice some: {}", outer.row(1).as_slice().is_some());
}
