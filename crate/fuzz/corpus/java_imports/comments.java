import a.b.C; import d.*;
/* import e.F; */
import static g.H.i;
import broken
