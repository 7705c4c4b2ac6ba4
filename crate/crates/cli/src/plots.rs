//! gnuplot scripts written next to the CSV outputs they read.

use std::path::Path;

use crate::failure::CliResult;

pub fn write(dir: &Path, name: &str, script: &str) -> CliResult<()> {
    mepck::io::write_atomic(&dir.join(name), script.as_bytes())?;
    Ok(())
}

pub fn scatter(csv: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'truth'\nset ylabel 'prediction'\n\
         set size square\n\
         plot '{csv}' using 1:2 with points pt 7 ps 0.4 title 'validation', x with lines title 'y = x'\n"
    )
}

pub fn flux(files: &[&str]) -> String {
    let series: Vec<String> =
        files.iter().map(|f| format!("'{f}' using 1:2 with lines title '{}'", f.trim_end_matches(".csv"))).collect();
    format!(
        "set datafile separator ','\n\
         set xlabel 'T_bar'\nset ylabel 'J_bar'\n\
         plot {}\n",
        series.join(", \\\n     ")
    )
}

pub fn marginals(dim: usize) -> String {
    let mut s = String::from("set datafile separator ','\nset multiplot layout 1,");
    s.push_str(&format!("{dim}\n"));
    for k in 1..=dim {
        s.push_str(&format!(
            "set title 'theta_{k}'\nplot 'marginals.csv' every ::1 using ($1=={k} ? $2 : 1/0):3 with lines notitle\n"
        ));
    }
    s.push_str("unset multiplot\n");
    s
}
