use peano_bsde::peano::{Family, PeanoFunction};

fn main() {
    for fam in Family::BUILTIN {
        let f = PeanoFunction::make_family(fam.name(), &[]).unwrap();
        println!("{:<48} {:?}", f.to_text().unwrap(), f.classify());
    }
}
